"""Shared fixtures and the acceptance summary hook."""

from __future__ import annotations

import json

import pytest

from lifesim.state import CharacterProfile


def world_reply(
    narrative: str = "The character potters around happily.",
    action: str = "The character potters around.",
    mode: str = "absolute",
    hunger: int = 70,
    energy: int = 70,
    fun: int = 70,
    hygiene: int = 70,
    environment: str = "Cozy Home",
    image_prompt: str = "The character potters around a warm room",
) -> str:
    """A well-formed world-model reply for scripted mocks."""
    body = {
        "narrative": narrative,
        "action": action,
        "state": {
            "mode": mode,
            "hunger": hunger,
            "energy": energy,
            "fun": fun,
            "hygiene": hygiene,
        },
        "environment": environment,
        "image_prompt": image_prompt,
    }
    return "```json\n" + json.dumps(body) + "\n```"


@pytest.fixture
def wizard_profile() -> CharacterProfile:
    return CharacterProfile(
        name="Archibus",
        descriptor="small owl wizard",
        personality="curious and tidy",
    )


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    label = item.function.__doc__ or item.name
    label = label.strip().splitlines()[0]
    _ACCEPTANCE_RESULTS.append((label, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, verdict in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{verdict}] {label}")
