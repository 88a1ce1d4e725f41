from utils.helpers import load_config, validate_config, manage_checkpoints, fit_log_linear

__all__ = ['load_config', 'validate_config', 'manage_checkpoints', 'fit_log_linear']
