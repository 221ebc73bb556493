import os
import json
import hashlib
from typing import Dict, Iterable, Iterator, List

import pandas as pd

OUTPUT_SUBFOLDERS = ['manifests', 'datasets', 'models', 'reports', 'heatmaps']


class FileHandler:
    def __init__(self, output_folder):
        self.output_folder = output_folder

    def create_output_layout(self):
        """Create the --out directory with its fixed subfolders"""
        os.makedirs(self.output_folder, exist_ok=True)
        for subfolder in OUTPUT_SUBFOLDERS:
            os.makedirs(os.path.join(self.output_folder, subfolder), exist_ok=True)
        return self.output_folder

    def path(self, subfolder, filename):
        return os.path.join(self.output_folder, subfolder, filename)

    def write_text(self, subfolder, filename, content):
        file_path = self.path(subfolder, filename)
        os.makedirs(os.path.dirname(file_path), exist_ok=True)
        with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
        return file_path

    def write_jsonl(self, subfolder, filename, rows: Iterable[Dict]):
        file_path = self.path(subfolder, filename)
        os.makedirs(os.path.dirname(file_path), exist_ok=True)
        write_jsonl(file_path, rows)
        return file_path

    def write_table(self, subfolder, filename, rows: List[Dict], columns: List[str] = None):
        """Machine-readable TSV table"""
        file_path = self.path(subfolder, filename)
        os.makedirs(os.path.dirname(file_path), exist_ok=True)
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(file_path, sep='\t', index=False, lineterminator='\n', float_format='%.10g')
        return file_path

    def write_json(self, subfolder, filename, payload: Dict):
        file_path = self.path(subfolder, filename)
        os.makedirs(os.path.dirname(file_path), exist_ok=True)
        with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write('\n')
        return file_path


def iter_lines(file_path) -> Iterator[tuple]:
    """(line_number, raw_line) pairs, 1-based, blank lines skipped"""
    with open(file_path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, 1):
            if line.strip():
                yield line_number, line


def read_jsonl(file_path) -> List[Dict]:
    return [json.loads(line) for _, line in iter_lines(file_path)]


def write_jsonl(file_path, rows: Iterable[Dict]):
    with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            f.write('\n')
    return file_path


def read_table(file_path) -> pd.DataFrame:
    """Tab- or comma-separated table, detected from the extension"""
    sep = ',' if str(file_path).endswith('.csv') else '\t'
    return pd.read_csv(file_path, sep=sep, dtype=str, keep_default_na=False)


def content_hash(file_path) -> str:
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def format_key_values(items) -> str:
    """Flat key-value text report"""
    lines = []
    for key, value in items:
        if isinstance(value, float):
            value = f"{value:.10g}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
