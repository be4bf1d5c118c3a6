__title__ = "koopman-rds"
__version__ = "0.1.0"
