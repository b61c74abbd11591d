class InvalidInput(ValueError):
    """An argument violates an operation's precondition."""
