class LaunchSimError(Exception):
    """Base class for all launchsim errors."""


class ConfigError(LaunchSimError):
    """Bad device configuration (empty bandwidth curve, negative capacity, ...)."""


class ScenarioError(LaunchSimError):
    """Scenario or profile file failed validation; message carries line/field context."""


class InvariantError(LaunchSimError):
    """Simulation accounting breach. This is a bug trap, not a user error."""
