"""Ready-made protocols, environments and processes shared by tests, demos and the CLI."""

from __future__ import annotations

from importlib import resources

from .env import CombinedEntry, Endpoint, TypingEnv
from .semantics import GlobalState
from .timecore import TRUE, Valuation, window
from .types import END, UNIT, Assertion, Comm, ExtChoice, GBranch, IntChoice, LBranch


def _gb(label, out_guard, out_reset, in_guard, in_reset, cont=END):
    return GBranch(label, UNIT, Assertion(out_guard, frozenset(out_reset), in_guard, frozenset(in_reset)), cont)


def data_forward():
    """Sat forwards Data to Ser."""
    return Comm("Sat", "Ser", (_gb("Data", window("C_Sat", 6, 7), {"C_Sat"}, window("C_Ser", 6, 7), {"C_Ser"}),))


def remote_data():
    """Sen sends Data to Sat, which forwards it to Ser."""
    return Comm("Sen", "Sat", (_gb("Data", window("C_Sen", 6, 7), {"C_Sen"}, window("C_Sat", 6, 7), set(),
                                   data_forward()),))


def remote_data_state() -> GlobalState:
    return GlobalState(Valuation.zero(["C_Sen", "C_Sat", "C_Ser"]), remote_data())


def _lb(label, guard, reset=(), cont=END):
    return LBranch(label, UNIT, guard, frozenset(reset), cont)


def remote_data_env(s: str = "s") -> TypingEnv:
    """Projections of the remote-data protocol, with Sat and Ser also prepared for failure."""
    sat = window("C_Sat", 6, 7)
    ser = window("C_Ser", 6, 7)
    t_sen = IntChoice("Sat", (_lb("Data", window("C_Sen", 6, 7), {"C_Sen"}),))
    t_sat = ExtChoice("Sen", (
        _lb("Data", sat, (), IntChoice("Ser", (_lb("Data", sat, {"C_Sat"}),))),
        _lb("fail", sat, (), IntChoice("Ser", (_lb("fatal", sat, {"C_Sat"}),))),
    ))
    t_ser = ExtChoice("Sat", (_lb("Data", ser, {"C_Ser"}), _lb("fatal", ser, {"C_Ser"})))
    z = lambda c: Valuation.zero([c])  # noqa: E731
    return TypingEnv({
        Endpoint(s, "Sen"): CombinedEntry(z("C_Sen"), t_sen, ()),
        Endpoint(s, "Sat"): CombinedEntry(z("C_Sat"), t_sat, ()),
        Endpoint(s, "Ser"): CombinedEntry(z("C_Ser"), t_ser, ()),
    })


def uninhabited_choice():
    """p→q with two labels; only the first can be selected by the narrowed environment."""
    return Comm("p", "q", (
        _gb("l1", window("C_p", 0, 1), (), window("C_q", 1, 2), ()),
        _gb("l2", window("C_p", 2, 4), (), window("C_q", 5, 6), ()),
    ))


def uninhabited_choice_state() -> GlobalState:
    return GlobalState(Valuation({"C_p": 3, "C_q": 3}), uninhabited_choice())


def uninhabited_choice_env(s: str = "s") -> TypingEnv:
    return TypingEnv({
        Endpoint(s, "p"): CombinedEntry(Valuation({"C_p": 3}), IntChoice("q", (_lb("l1", window("C_p", 0, 1)),)), ()),
        Endpoint(s, "q"): CombinedEntry(Valuation({"C_q": 3}), ExtChoice("p", (
            _lb("l1", window("C_q", 1, 2)), _lb("l2", window("C_q", 5, 6)))), ()),
    })


def fixture_text(name: str) -> str:
    """Contents of a bundled fixture file."""
    return resources.files("atmp").joinpath("fixtures", name).read_text(encoding="utf-8")


__all__ = [
    "TRUE",
    "data_forward",
    "fixture_text",
    "remote_data",
    "remote_data_env",
    "remote_data_state",
    "uninhabited_choice",
    "uninhabited_choice_env",
    "uninhabited_choice_state",
]
