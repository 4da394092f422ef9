from __future__ import annotations

import pytest

from convtox.model import ConversationNode, build_forest

# id -> parent for the small annotated thread used across the model tests
FIG1_PARENTS = {
    "0": None,
    "1": "0",
    "2": "0",
    "1.1": "1",
    "1.2": "1",
    "2.1": "2",
    "1.1.1": "1.1",
}


def make_node(node_id, parent=None, toxicity=None, created=0, body="text", community="c",
              **kw) -> ConversationNode:
    return ConversationNode(node_id, parent, "author", created, 0, body, community, toxicity,
                            **kw)


def fig1_records(toxicity: dict[str, float] | None = None) -> list[ConversationNode]:
    return [make_node(nid, par, None if toxicity is None else toxicity[nid], created=i)
            for i, (nid, par) in enumerate(FIG1_PARENTS.items())]


@pytest.fixture
def fig1_tree():
    forest, _ = build_forest(fig1_records())
    return forest.trees[0]


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


_results: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        if rep.skipped:
            detail = str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else detail
        _results[number] = (title, status, detail)
    elif rep.failed:
        _results[number] = (title, "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, status, detail = _results[number]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] {number}. {title}{suffix}")
