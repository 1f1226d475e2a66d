"""JSON and CSV report files."""
import csv
import json
import math
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence

import jsonschema

from .config import CSV_FLOAT_FORMAT, JSON_INDENT, REPORT_SCHEMA_PATH, logger
from .envelope import ReportEnvelope, sanitize


def _load_schema(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def _cell(value: Any) -> Any:
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float):
        return CSV_FLOAT_FORMAT.format(value) if math.isfinite(value) else ""
    return value


class ReportWriter:
    """
    Writes reports under one output directory. Files are written to a
    temporary name and moved into place, so a crash never leaves half a report.
    """
    def __init__(self, out_dir: str, schema_path: str = REPORT_SCHEMA_PATH):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.schema: Optional[Dict[str, Any]] = _load_schema(schema_path) if os.path.exists(schema_path) else None
        if self.schema is None:
            logger.warning(f"Report schema not found at {schema_path}; reports will not be validated.")

    def _atomic_write(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        return path

    def validate(self, document: Dict[str, Any]) -> None:
        if self.schema is None:
            return
        validator = jsonschema.Draft202012Validator(self.schema)
        errors = sorted(validator.iter_errors(document), key=lambda e: [str(p) for p in e.absolute_path])
        if errors:
            first = errors[0]
            raise ValueError(f"Report does not match its schema at {first.json_path}: {first.message}")

    def write_json(self, name: str, envelope: ReportEnvelope) -> str:
        document = sanitize(envelope.to_dict())
        self.validate(document)
        path = self._atomic_write(name, json.dumps(document, indent=JSON_INDENT, sort_keys=True) + "\n")
        logger.info(f"Wrote {envelope.command} report to {path}")
        return path

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]], columns: List[str]) -> str:
        lines: List[str] = []

        class _Sink:
            def write(self, s: str) -> None:
                lines.append(s)

        writer = csv.DictWriter(_Sink(), fieldnames=columns, extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})
        path = self._atomic_write(name, "".join(lines))
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path
