"""
IO
--
A collection of various functions for dealing with input and outputs:
configuration files, JSON/JSONL records, aligned text tables and the
tensor checkpoint format.

A checkpoint is a pair of files: a UTF-8 JSON manifest listing every
tensor's name, shape, dtype and byte offset, and a sidecar blob of
little-endian 32-bit floats in manifest order.

"""

__all__ = [
    'dump_json',
    'load_checkpoint',
    'load_json',
    'load_yaml',
    'read_jsonl',
    'save_checkpoint',
    'write_jsonl',
    'write_row',
    ]

import json
import os

import numpy as np
import yaml

BLOB_DTYPE = np.dtype("<f4")
CHECKPOINT_FORMAT = "intermep-checkpoint"


def load_yaml(path):
    """
    Loads data from a YAML (or JSON) configuration file.

    Given an a path to a YAML file, returns a dictionary
    containing all of the data contained in the file. JSON is a subset
    of YAML, so JSON config files load the same way.

    Parameters
    ----------
    path : str
        The path to a YAML or JSON file.

    Returns
    -------
    dict :
        A dictionary containing all the data in the file. An empty
        file gives an empty dictionary.

    """
    with open(path, 'r', encoding='utf-8') as file_object:
        data = yaml.safe_load(file_object)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return data


def load_json(path):
    with open(path, 'r', encoding='utf-8') as file_object:
        return json.load(file_object)


def dump_json(path, data):
    """
    Writes JSON with sorted keys and a trailing newline, so equal data
    always gives byte-identical files.

    """
    with open(path, 'w', encoding='utf-8') as file_object:
        json.dump(data, file_object, indent=2, sort_keys=True)
        file_object.write("\n")


def read_jsonl(path):
    """
    Iterates over the records of a JSONL file.

    Blank lines are skipped.

    Yields
    ------
    line_no : int
        1-based line number.
    record : object
        The decoded JSON value.

    Raises
    ------
    ValueError
        If a line is not valid JSON, naming the line number.

    """
    with open(path, 'r', encoding='utf-8') as file_object:
        for line_no, line in enumerate(file_object, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: line {line_no}: invalid JSON ({err.msg})") from None
            yield line_no, record


def write_jsonl(path, records):
    """Writes one compact JSON object per line."""
    with open(path, 'w', encoding='utf-8') as file_object:
        for record in records:
            file_object.write(json.dumps(record, separators=(",", ":")))
            file_object.write("\n")


def write_row(output, data, col_width=12, decimals=4):
    """
    A wrapper around the write function to automate spacing when
    writing rows of columned data.

    Parameters
    ----------
    output : TextIOWrapper
        An open file (or sys.stdout) with write permissions.
    data : list
        The items of the row. Each item will be written to a new
        column. Strings are left aligned as is, integers are written
        whole and floats with `decimals` places.
    col_width : int, optional
        The width of the columns in number of characters.
        Default: 12
    decimals : int, optional
        The decimal point precision for floating point numbers.
        Default: 4

    """
    row = ""
    for item in data:
        if isinstance(item, (bool, np.bool_)) or isinstance(item, str):
            row = f"{row}{str(item):<{col_width}}"
        elif isinstance(item, (int, np.integer)):
            row = f"{row}{int(item):<{col_width}d}"
        else:
            row = f"{row}{float(item):<{col_width}.{decimals}f}"

    output.write(f"{row.rstrip()}\n")


def _blob_path(manifest_path):
    stem, _ = os.path.splitext(manifest_path)
    return f"{stem}.bin"


def save_checkpoint(path, tensors, metadata=None):
    """
    Writes named arrays as a manifest + little-endian float32 blob.

    Parameters
    ----------
    path : str
        Manifest path, e.g. "out/model.json". The blob goes next to it
        with a ".bin" suffix.
    tensors : dict of str -> np.ndarray
        Arrays in the order they should be stored.
    metadata : dict or None, optional
        Extra JSON-serialisable entries for the manifest (config,
        vocabulary, ...).

    Returns
    -------
    manifest : dict

    """
    blob_path = _blob_path(path)
    entries = []
    offset = 0
    with open(blob_path, 'wb') as blob:
        for name, array in tensors.items():
            data = np.ascontiguousarray(array, dtype=BLOB_DTYPE)
            blob.write(data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "dtype": "float32",
                            "offset": offset, "nbytes": data.nbytes})
            offset += data.nbytes

    manifest = {"format": CHECKPOINT_FORMAT, "version": 1,
                "blob": os.path.basename(blob_path), "tensors": entries}
    manifest.update(metadata or {})
    dump_json(path, manifest)
    return manifest


def load_checkpoint(path):
    """
    Reads a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    tensors : dict of str -> np.ndarray
        float32 arrays in manifest order.
    manifest : dict

    Raises
    ------
    FileNotFoundError
        If the manifest or blob is missing.
    ValueError
        If the manifest is not a checkpoint or the blob is truncated.

    """
    manifest = load_json(path)
    if not isinstance(manifest, dict) or manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an intermep checkpoint manifest")
    blob_path = os.path.join(os.path.dirname(path), manifest["blob"])
    with open(blob_path, 'rb') as blob:
        raw = blob.read()

    tensors = {}
    for entry in manifest["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(raw):
            raise ValueError(f"{blob_path} is truncated at tensor '{entry['name']}'")
        array = np.frombuffer(raw[start:stop], dtype=BLOB_DTYPE)
        tensors[entry["name"]] = array.reshape(entry["shape"]).astype(np.float32)
    return tensors, manifest
