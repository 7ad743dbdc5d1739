# criterion number -> (title, passed, detail); filled in by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
