"""Small CSV helpers used by every reader/writer.

Floats are written with ``repr`` (shortest round-trip form) so that a
write/read cycle is bit-exact and output bytes do not depend on platform.
"""
import csv
import io
import os
import tempfile
from pathlib import Path


def fmt(value):
    """Shortest round-trip text for a number."""
    if isinstance(value, float):
        if value == 0.0:
            return "0.0"
        return repr(value)
    return str(value)


def read_rows(source):
    """Yield ``(line_no, fields)`` from a CSV path, text or byte stream.

    Blank lines and lines starting with ``#`` are skipped.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    rows = []
    for line_no, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not fields or not "".join(fields).strip():
            continue
        if fields[0].lstrip().startswith("#"):
            continue
        rows.append((line_no, [f.strip() for f in fields]))
    return rows


def comment_lines(source):
    """Return the ``#`` comment lines of a CSV path, stripped of the marker."""
    out = []
    with open(source, "r", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if s.startswith("#"):
                out.append(s[1:].strip())
    return out


def to_csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    atomic_write(path, to_csv_text(header, rows))
