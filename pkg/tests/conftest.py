def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, independent of capture."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            if "test_acceptance" in rep.nodeid:
                rows.append((rep.nodeid.split("::", 1)[-1], outcome.upper()))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(rows):
            terminalreporter.write_line(f"{outcome:6s} {name}")
