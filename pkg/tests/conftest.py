import pytest

# criterion number -> (passed, title, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title} -- {detail}")


@pytest.fixture
def acceptance():
    """Record one criterion's verdict; an exception inside the block marks it FAIL."""

    class Recorder:
        def __init__(self):
            self.detail = []

        def note(self, text):
            self.detail.append(text)

        def __call__(self, n, title):
            rec = self

            class _Block:
                def __enter__(self):
                    return rec

                def __exit__(self, exc_type, exc, tb):
                    ok = exc_type is None
                    detail = "; ".join(rec.detail)
                    if not ok:
                        detail = f"{detail}; {exc_type.__name__}: {exc}".lstrip("; ")
                    ACCEPTANCE[n] = (ok, title, detail)
                    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title} -- {detail}")
                    return False

            return _Block()

    return Recorder()
