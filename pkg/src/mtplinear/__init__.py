"""Mass transference for systems of linear forms: dimension functions, resonant planes,
measure and dimension estimators, and the Cantor-set construction."""

__version__ = "0.1.0"
