"""
Export utilities for QubitThermo
Deterministic CSV and JSON writers. Data files carry fixed float formatting and
ordering so that identical runs produce byte-identical files; wall-clock
timestamps only ever appear in JSON sidecars under 'generated_at'.
"""

from utils.common_imports import *
from utils.logger import logger
import io
from typing import Iterable


def format_value(value) -> str:
    """Fixed-width text for one CSV cell"""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT_FORMAT.format(v)
    return str(value)


def _atomic_write(filepath: str, text: str):
    """Write to a temporary file first, then move it over the target"""
    directory = os.path.dirname(filepath)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        temp_file = filepath + '.tmp'
        with open(temp_file, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        shutil.move(temp_file, filepath)
    except OSError as e:
        logger.log_dataset(filepath, e)
        raise ExportError(f"Failed to write {filepath}: {e}") from e
    logger.log_dataset(filepath)


def write_csv(filepath: str,
              header: Sequence[str],
              rows: Iterable[Sequence[Any]],
              metadata: Optional[Dict[str, Any]] = None) -> str:
    """
    Write a CSV table preceded by '#'-prefixed metadata comment lines

    Args:
        filepath: Output path
        header: Column names
        rows: Row sequences; floats use the shared fixed format
        metadata: Scenario record written as '# key = value' lines in sorted key order

    Returns:
        The path written
    """
    lines = []
    for key in sorted(metadata or {}):
        lines.append(f"# {key} = {_metadata_text(metadata[key])}")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])

    text = "\n".join(lines) + ("\n" if lines else "") + buffer.getvalue()
    _atomic_write(filepath, text)
    return filepath


def read_csv(filepath: str) -> Tuple[Dict[str, str], List[str], np.ndarray]:
    """
    Read a CSV written by write_csv

    Returns:
        (metadata, header, numeric table as a float array)
    """
    metadata = {}
    body = []
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            for line in f:
                if line.startswith('#'):
                    key, _, value = line[1:].partition('=')
                    metadata[key.strip()] = value.strip()
                elif line.strip():
                    body.append(line)
    except OSError as e:
        raise ExportError(f"Failed to read {filepath}: {e}") from e

    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        raise ExportError(f"{filepath} has no header row")
    table = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return metadata, header, table.reshape(-1, len(header))


def to_jsonable(obj):
    """Recursively convert numpy types and non-finite floats for JSON output"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(filepath: str, payload: Dict[str, Any], sidecar: bool = True) -> str:
    """
    Write a versioned JSON document

    Args:
        filepath: Output path
        payload: Document body; schema_version is added
        sidecar: Add a 'generated_at' timestamp (excluded from determinism checks)

    Returns:
        The path written
    """
    document = {'schema_version': SCHEMA_VERSION}
    document.update(to_jsonable(payload))
    if sidecar:
        document['generated_at'] = datetime.now().isoformat(timespec='seconds')
    text = json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"
    _atomic_write(filepath, text)
    return filepath


def read_json(filepath: str) -> Dict[str, Any]:
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ExportError(f"Failed to read {filepath}: {e}") from e


def _metadata_text(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format_value(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ", ".join(_metadata_text(v) for v in value)
    return str(value)

