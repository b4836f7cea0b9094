"""Application configuration.

One YAML file configures the server and CLI: provider endpoints per
logical role (world, user, judge, topic), the image service, plan
defaults, and server paths. Secrets never appear in the file; each
endpoint names the environment variable that holds its key.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from lifesim.errors import ConfigurationError
from lifesim.fusion import BlockPolicy
from lifesim.imaging import (
    DEFAULT_CHAR_ADAPTER,
    DEFAULT_ENV_ADAPTER,
    DEFAULT_LORA_MERGE,
    DEFAULT_STEPS,
    HttpImageClient,
    MockImageClient,
    PlanDefaults,
)
from lifesim.providers import (
    ChatMessage,
    ChatRequest,
    MockProvider,
    OpenAIChatProvider,
    ProviderConfig,
)

ROLES = ("world_model", "user_model", "judge_model", "topic_model")

# Mock flavor each role's generator emits when providers.mode == "mock".
_ROLE_FLAVORS = {
    "world_model": "world",
    "user_model": "user",
    "judge_model": "judge",
    "topic_model": "topic",
}


@dataclass(frozen=True)
class RoleConfig:
    """One logical model role: endpoint plus sampling settings.
    Sampling defaults are deliberate: temperature 1.0, top_p 1.0."""

    model: str
    endpoint: str = ""
    api_key_env_var: Optional[str] = None
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 1024
    request_timeout_ms: int = 30_000
    max_retries: int = 2
    backoff_base_ms: int = 250

    def provider_config(self) -> ProviderConfig:
        if not self.endpoint:
            raise ConfigurationError(f"role {self.model!r} has no endpoint configured")
        return ProviderConfig(
            endpoint_url=self.endpoint,
            api_key_env_var=self.api_key_env_var,
            max_retries=self.max_retries,
            backoff_base_ms=self.backoff_base_ms,
        )

    def request(self, prompt: str) -> ChatRequest:
        return ChatRequest(
            messages=(ChatMessage("user", prompt),),
            model=self.model,
            temperature=self.temperature,
            top_p=self.top_p,
            max_tokens=self.max_tokens,
            request_timeout_ms=self.request_timeout_ms,
        )


@dataclass(frozen=True)
class ServerSettings:
    data_dir: str = "./lifesim-data"
    templates_dir: Optional[str] = None
    history_window: int = 5
    latency_target_ms: int = 1000
    metrics_window: int = 256


@dataclass(frozen=True)
class ImageServiceSettings:
    mode: str = "mock"
    endpoint: str = ""
    api_key_env_var: Optional[str] = None
    max_retries: int = 2
    backoff_base_ms: int = 250


@dataclass(frozen=True)
class AppConfig:
    provider_mode: str = "mock"
    mock_seed: int = 42
    roles: dict = field(
        default_factory=lambda: {role: RoleConfig(model=role.replace("_model", "-sim")) for role in ROLES}
    )
    image: ImageServiceSettings = field(default_factory=ImageServiceSettings)
    plan: PlanDefaults = field(default_factory=PlanDefaults)
    server: ServerSettings = field(default_factory=ServerSettings)

    def role(self, name: str) -> RoleConfig:
        if name not in self.roles:
            raise ConfigurationError(f"no configuration for role {name!r}")
        return self.roles[name]


def _parse_role(name: str, data: dict) -> RoleConfig:
    if not isinstance(data, dict):
        raise ConfigurationError(f"role {name} must be a mapping")
    try:
        return RoleConfig(
            model=str(data.get("model", name.replace("_model", "-sim"))),
            endpoint=str(data.get("endpoint", "")),
            api_key_env_var=data.get("api_key_env_var"),
            temperature=float(data.get("temperature", 1.0)),
            top_p=float(data.get("top_p", 1.0)),
            max_tokens=int(data.get("max_tokens", 1024)),
            request_timeout_ms=int(data.get("request_timeout_ms", 30_000)),
            max_retries=int(data.get("max_retries", 2)),
            backoff_base_ms=int(data.get("backoff_base_ms", 250)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"role {name}: {exc}") from exc


def _parse_plan(data: dict) -> PlanDefaults:
    merge = data.get("lora_merge")
    lora = (
        tuple((str(item[0]), float(item[1])) for item in merge)
        if merge is not None
        else DEFAULT_LORA_MERGE
    )
    policy_data = data.get("block_policy") or {}
    policy = BlockPolicy(
        down=policy_data.get("down", "no_environment"),
        mid=policy_data.get("mid", "regional"),
        up=policy_data.get("up", "regional"),
    )
    return PlanDefaults(
        character_adapter=str(data.get("character_adapter", DEFAULT_CHAR_ADAPTER)),
        environment_adapter=str(data.get("environment_adapter", DEFAULT_ENV_ADAPTER)),
        lora_merge=lora,
        alpha_e=float(data.get("alpha_e", 1.0)),
        alpha_c=float(data.get("alpha_c", 1.0)),
        r_percent=float(data.get("r_percent", 60.0)),
        num_inference_steps=int(data.get("num_inference_steps", DEFAULT_STEPS)),
        block_policy=policy,
        seed=data.get("seed"),
    )


def load_config(path: Optional[Path | str] = None) -> AppConfig:
    """Parse a YAML config file; a missing path yields pure defaults
    (mock providers, mock image service)."""
    if path is None:
        return AppConfig()
    raw = Path(path).read_text("utf-8")
    try:
        data = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} root must be a mapping")

    providers = data.get("providers") or {}
    mode = str(providers.get("mode", "mock"))
    if mode not in ("mock", "http"):
        raise ConfigurationError(f"providers.mode must be 'mock' or 'http', got {mode!r}")
    base = AppConfig()
    roles = dict(base.roles)
    for role in ROLES:
        if role in providers:
            roles[role] = _parse_role(role, providers[role])
    if mode == "http":
        for role in ROLES:
            if not roles[role].endpoint:
                raise ConfigurationError(f"providers.{role}.endpoint required in http mode")

    image_data = data.get("image_service") or {}
    image_mode = str(image_data.get("mode", "mock"))
    if image_mode not in ("mock", "http"):
        raise ConfigurationError(f"image_service.mode must be 'mock' or 'http', got {image_mode!r}")
    if image_mode == "http" and not image_data.get("endpoint"):
        raise ConfigurationError("image_service.endpoint required in http mode")
    image = ImageServiceSettings(
        mode=image_mode,
        endpoint=str(image_data.get("endpoint", "")),
        api_key_env_var=image_data.get("api_key_env_var"),
        max_retries=int(image_data.get("max_retries", 2)),
        backoff_base_ms=int(image_data.get("backoff_base_ms", 250)),
    )

    server_data = data.get("server") or {}
    server = ServerSettings(
        data_dir=str(server_data.get("data_dir", "./lifesim-data")),
        templates_dir=server_data.get("templates_dir"),
        history_window=int(server_data.get("history_window", 5)),
        latency_target_ms=int(server_data.get("latency_target_ms", 1000)),
        metrics_window=int(server_data.get("metrics_window", 256)),
    )

    return AppConfig(
        provider_mode=mode,
        mock_seed=int(providers.get("mock_seed", 42)),
        roles=roles,
        image=image,
        plan=_parse_plan(data.get("plan") or {}),
        server=server,
    )


def build_provider(config: AppConfig, role: str):
    """Instantiate the provider behind one logical role."""
    role_cfg = config.role(role)
    if config.provider_mode == "mock":
        # Distinct seeds per role so a shared base seed still yields
        # different streams for world vs user vs judge.
        offset = ROLES.index(role)
        return MockProvider.generator(config.mock_seed + offset, _ROLE_FLAVORS[role])
    return OpenAIChatProvider(role_cfg.provider_config())


def build_image_client(config: AppConfig):
    if config.image.mode == "mock":
        return MockImageClient()
    return HttpImageClient(
        ProviderConfig(
            endpoint_url=config.image.endpoint,
            api_key_env_var=config.image.api_key_env_var,
            max_retries=config.image.max_retries,
            backoff_base_ms=config.image.backoff_base_ms,
        )
    )


def with_data_dir(config: AppConfig, data_dir: str) -> AppConfig:
    return replace(config, server=replace(config.server, data_dir=data_dir))
