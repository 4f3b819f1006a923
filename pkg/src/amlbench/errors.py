class AmlBenchError(Exception):
    pass


class DataFormatError(AmlBenchError):
    """Malformed or inconsistent input files."""


class NonConvergenceError(AmlBenchError):
    def __init__(self, what, iterations, residual):
        super().__init__(f"{what} did not converge after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class TrainingError(AmlBenchError):
    """Raised on NaN losses or gradients during optimisation."""
