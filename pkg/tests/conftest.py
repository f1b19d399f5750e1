import pytest

from riesz_kinetics import ci_config, runner

_CRITERION_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else "")
    _CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ci_run(tmp_path_factory):
    """The desk-scale verification run shared by the acceptance suite:
    simulate + scatter + rates on the CI preset (2e3 sampled particles,
    t_final = 400, direct forces)."""
    out = tmp_path_factory.mktemp("ci_run")
    cfg = ci_config(out_dir=str(out))
    hist = runner.run_simulate(cfg)
    ens = runner.build_ensemble(cfg)
    scatter = runner.run_scatter(cfg, hist=hist, ens=ens)
    report = runner.run_rates(cfg)
    entries = {e["quantity"]: e for e in report["entries"]}
    return {
        "cfg": cfg,
        "run_dir": runner.run_dir_of(cfg),
        "hist": hist,
        "ens": ens,
        "scatter": scatter,
        "report": report,
        "entries": entries,
    }
