"""Command-line harness: verification suites, sweeps and report I/O."""
