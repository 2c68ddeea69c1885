class ShapeError(ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}")


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str) -> None:
        self.op = op
        super().__init__(f"{op}: produced a non-finite value")


class GraphError(RuntimeError):
    pass
