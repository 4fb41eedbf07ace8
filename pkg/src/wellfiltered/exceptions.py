class GeometryError(ValueError):
    """A window, box or cube does not fit where it is used."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""
