from .envelope import ReportEnvelope
from .run_config import RunConfig, config_hash, load_config
from .writer import ReportWriter

__all__: list[str] = ['ReportEnvelope', 'ReportWriter', 'RunConfig', 'config_hash', 'load_config']
