"""Exception hierarchy. Every error carries the name of the module that raised it."""

from __future__ import annotations


class StitchError(Exception):
    module = "stitchplan"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class GraphError(StitchError):
    module = "graph_ir"


class GraphSyntaxError(GraphError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


class UnknownOpError(GraphError):
    pass


class UnresolvedOperandError(GraphError):
    pass


class ShapeMismatchError(GraphError):
    pass


class CycleError(GraphError):
    pass


class DeadNodeError(GraphError):
    pass


class ConfigError(StitchError):
    module = "device_model"


class InfeasibleKernel(StitchError):
    """Resource request that no launch can satisfy (e.g. shared memory over the per-block limit)."""

    module = "device_model"


class UnsupportedClass(StitchError):
    module = "schedule_catalog"


class InfeasibleSchedule(StitchError):
    module = "codegen_planner"


class InfeasiblePattern(StitchError):
    module = "codegen_planner"


class KernelTextError(StitchError):
    module = "codegen_planner"


class SimFault(StitchError):
    """Hard interpreter fault: the stitched program broke a SIMT rule."""

    module = "sim_executor"


class HappensBeforeFault(SimFault):
    pass


class SharedBoundsFault(SimFault):
    pass


class LocalityFault(SimFault):
    pass


class InputError(StitchError):
    module = "sim_executor"
