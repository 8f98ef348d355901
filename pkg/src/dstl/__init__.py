"""Deep self-taught learning with archetypal dictionaries."""
