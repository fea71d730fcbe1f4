"""One summary line per acceptance criterion, printed at the end of the session."""
LINES = []
