class MetaregError(Exception):
    """Base class for errors raised by metareg."""


class ConfigError(MetaregError):
    pass


class DataError(MetaregError):
    pass


class TrainingError(MetaregError):
    pass
