from .experiments_routes import experiments_bp
from .presets_routes import presets_bp

__all__ = ['experiments_bp', 'presets_bp']
