"""powergame: energy-efficient power control games, from the static NE to the mean-field limit."""

__all__ = [
    "efficiency",
    "static_game",
    "dynamics",
    "grid",
    "hjb",
    "kplayer_sim",
    "mfg",
    "config",
    "utils",
]

__version__ = "0.3.0"
