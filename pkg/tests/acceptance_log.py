"""Pass/fail lines collected by the acceptance suite, printed at the end of the run."""

RESULTS: list[str] = []
