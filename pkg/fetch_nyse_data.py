#!/usr/bin/env python3
"""
Fetch and convert an NYSE price-relative dataset into the whitespace-matrix
format read by data_manager.load_returns.

The two datasets are published on the portfolio data page
http://www.cs.bme.hu/~oti/portfolio/data.html; pass the URL of the file you
want (or a local path) explicitly:

    python fetch_nyse_data.py <url-or-path> nyse2 [--data data]

Accepted inputs: whitespace- or comma-separated price relatives, with or
without a header row of ticker names. A header is written to the
`<dataset>.tickers` sidecar.
"""

import argparse
import io
import logging
import os
import sys

import pandas as pd
import requests

from data_manager import (NYSE1_FILE, NYSE1_SHAPE, NYSE2_FILE, NYSE2_SHAPE, ReturnsMatrix,
                          default_tickers, normalize_ticker, resolve_data_dir, save_returns)

logger = logging.getLogger(__name__)

TARGETS = {'nyse1': (NYSE1_FILE, NYSE1_SHAPE), 'nyse2': (NYSE2_FILE, NYSE2_SHAPE)}
TIMEOUT = 60


def read_source(source: str) -> str:
    """Text of a URL (requests) or of a local file."""
    if source.startswith(('http://', 'https://')):
        response = requests.get(source, timeout=TIMEOUT)
        response.raise_for_status()
        return response.text
    with open(source, 'r', encoding='utf-8') as f:
        return f.read()


def parse_relatives(text: str) -> ReturnsMatrix:
    """
    Parse price relatives; a first row that is not numeric is taken as ticker names.
    """
    sep = ',' if ',' in text.splitlines()[0] else r'\s+'
    raw = pd.read_csv(io.StringIO(text), sep=sep, header=None, dtype=str)
    first = pd.to_numeric(raw.iloc[0], errors='coerce')
    tickers = None
    if first.isna().all():
        tickers = [normalize_ticker(t) for t in raw.iloc[0]]
        raw = raw.iloc[1:]
    values = raw.apply(pd.to_numeric, errors='coerce')
    if values.isna().any().any():
        raise ValueError("Dataset contains non-numeric entries")
    values = values.to_numpy(dtype=float)
    return ReturnsMatrix(values, tickers or default_tickers(values.shape))


def convert(source: str, dataset: str, data_dir: str = None) -> str:
    """Download/convert `source` to <data_dir>/<dataset file>; returns the written path."""
    filename, shape = TARGETS[dataset]
    R = parse_relatives(read_source(source))
    if R.shape != shape:
        logger.warning("%s has shape %s, expected %s", source, R.shape, shape)
    target_dir = resolve_data_dir(data_dir)
    os.makedirs(target_dir, exist_ok=True)
    path = os.path.join(target_dir, filename)
    save_returns(R, path)
    return path


def main():
    parser = argparse.ArgumentParser(description="Fetch an NYSE price-relative dataset")
    parser.add_argument('source', help="File URL or local path")
    parser.add_argument('dataset', choices=sorted(TARGETS), help="Target dataset name")
    parser.add_argument('--data', help="Dataset directory (default $RELUTIL_DATA_DIR or ./data)")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')

    try:
        path = convert(args.source, args.dataset, args.data)
        print(f"Wrote {path}")
    except requests.RequestException as e:
        print(f"Error: download failed: {e}")
        sys.exit(1)
    except FileNotFoundError:
        print(f"Error: Could not find file '{args.source}'")
        sys.exit(3)
    except Exception as e:
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)


if __name__ == "__main__":
    main()
