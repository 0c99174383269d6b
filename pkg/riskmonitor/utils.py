import hashlib
import json
import os
from time import process_time, time

import numpy as np


def get_memory_usage():
    """Parses /proc/self/status to extract relevant memory figures.

    Returns
    -------
    memuse : dict
        A dict from str (name of memory figure) to float (size in MB). Empty
        where /proc is not available; callers treat missing figures as
        unknown.
    """
    memuse = {}
    if not os.path.exists("/proc/self/status"):
        return memuse
    with open("/proc/self/status") as status:
        # Only works in Unix-like systems with procfs (like Linux).
        for line in status:
            parts = line.split()
            if parts and parts[0].startswith("Vm"):
                key = parts[0][:-1].lower()
                memuse[key] = float(parts[1])/1024
    return memuse


class Timer:
    def __init__(self):
        self.start = None
        self.tic()

    def tic(self):
        self.start = (process_time(), time())

    def toc(self):
        """(cpu seconds, wall seconds) since the last tic."""
        return process_time() - self.start[0], time() - self.start[1]


def format_number(x):
    """Formats a number with 17 significant digits, enough for a float to
    round-trip. Integers and booleans are written as integers."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return "%.17g" % x


def stable_hash(obj):
    """SHA-256 of the canonical JSON of ``obj`` (sorted keys, no spaces)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def trial_seed(master, *keys):
    """Seed sequence of one trial, derived from the master seed and the
    keys identifying the trial (e.g. trial index and batch size). The same
    keys always give the same stream, whatever else runs."""
    return np.random.SeedSequence([int(master)] + [int(k) for k in keys])
