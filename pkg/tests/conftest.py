ACCEPTANCE_RESULTS = []


def record_acceptance(name, ok, detail):
    line = f"ACCEPTANCE {name} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
