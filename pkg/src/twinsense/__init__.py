"""Site-specific digital-twin MIMO simulator with learned compressive
channel sensing and RF beam prediction."""

__version__ = "0.1.0"
