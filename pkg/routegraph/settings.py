"""
Configuration for the routegraph CLI, agent and registry.

Precedence: explicit CLI flags > ``ROUTEGRAPH_*`` environment variables >
JSON config file (``~/.config/routegraph/config.json`` or the path in
``ROUTEGRAPH_CONFIG``) > defaults.
"""

import json
import os
from pathlib import Path
from typing import Any

import structlog
from pydantic import Field
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from routegraph.models import (
    CostModel,
    FeeSchedule,
    FeeSplit,
    ScoringWeights,
    VerificationConfig,
)
from routegraph.protocol import ACCEPTANCE_THRESHOLD, MIN_SIMILARITY

logger = structlog.get_logger(__name__)

DEFAULT_CONFIG_PATH = Path("~/.config/routegraph/config.json")
DEFAULT_DATA_DIR = Path("~/.local/share/routegraph")


def _default_cost_model() -> CostModel:
    # Browser-automation first-call costs, in micro-dollars
    return CostModel(
        c_latency=50_000, c_compute=20_000, c_tokens=200_000, c_retry=130_000, p_fail=0.3
    )


class RouteGraphSettings(BaseSettings):
    """Operator configuration"""

    model_config = SettingsConfigDict(
        env_prefix="ROUTEGRAPH_", env_nested_delimiter="__", extra="ignore"
    )

    registry_url: str = Field("http://127.0.0.1:8765", description="Registry base URL")
    local_registry: bool = Field(
        True, description="Run the registry in-process over registry_dir instead of registry_url"
    )
    payer_id: str = Field("agent-local", description="Wallet id this agent pays from")
    contributor_id: str = Field("agent-local", description="Id credited for published routes")
    data_dir: Path = DEFAULT_DATA_DIR
    wallet_path: Path | None = None
    vault_path: Path | None = None
    cache_path: Path | None = None
    install_dir: Path | None = None
    ledger_path: Path | None = None
    registry_dir: Path | None = None

    search_fee: int = Field(5_000, ge=0, description="Tier 3 fee per query (micro-dollars)")
    install_base: int = Field(10_000, ge=0, description="Tier 1 base price (micro-dollars)")
    expected_install_fee: int = Field(
        20_000, ge=0, description="Install fee assumed by the adoption check"
    )
    cost_model: CostModel = Field(default_factory=_default_cost_model)
    fee_split: FeeSplit = Field(default_factory=FeeSplit)
    weights: ScoringWeights = Field(default_factory=ScoringWeights)
    verification: VerificationConfig = Field(default_factory=VerificationConfig)
    acceptance_threshold: float = Field(ACCEPTANCE_THRESHOLD, ge=0.0, le=1.0)
    min_similarity: float = Field(MIN_SIMILARITY, ge=0.0, le=1.0)

    host: str = "127.0.0.1"
    port: int = 8765
    agent_port: int = 8766
    log_level: str = "INFO"
    json_logs: bool = False

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # init values come from the config file, so env wins over them
        return env_settings, init_settings, file_secret_settings

    def expected_fees(self) -> FeeSchedule:
        return FeeSchedule(f_search=self.search_fee, f_install=self.expected_install_fee)

    def path_for(self, name: str) -> Path:
        """Resolve one of the *_path / *_dir fields, defaulting under data_dir"""
        defaults = {
            "wallet_path": "wallet.json",
            "vault_path": "vault.json",
            "cache_path": "route_cache.json",
            "install_dir": "skills",
            "ledger_path": "ledger.jsonl",
            "registry_dir": "registry",
        }
        value: Path | None = getattr(self, name)
        if value is None:
            value = self.data_dir / defaults[name]
        return value.expanduser()


def load_settings(config_path: Path | None = None, **overrides: Any) -> RouteGraphSettings:
    """
    Build settings from the config file, the environment and CLI overrides.

    Overrides whose value is None are ignored so unset CLI flags fall through.
    """
    path = config_path or Path(os.environ.get("ROUTEGRAPH_CONFIG", DEFAULT_CONFIG_PATH))
    path = path.expanduser()
    file_values: dict[str, Any] = {}
    if path.exists():
        try:
            file_values = json.loads(path.read_text("utf-8"))
            logger.debug("config_loaded", path=str(path), keys=sorted(file_values))
        except json.JSONDecodeError as e:
            logger.warning("config_unreadable", path=str(path), error=str(e))

    settings = RouteGraphSettings(**file_values)
    explicit = {k: v for k, v in overrides.items() if v is not None}
    if explicit:
        settings = settings.model_copy(update=explicit)
    return settings
