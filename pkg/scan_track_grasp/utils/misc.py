import hashlib
import random

import numpy as np


def set_random_seed(seed):
    random.seed(seed)
    np.random.seed(seed)


def make_rng(seed, *streams):
    ''' Independent, reproducible generator for a (seed, stream...) key. '''
    return np.random.default_rng([int(seed)] + [int(s) for s in streams])


def sha1_of_file(path, chunk=1 << 20):
    h = hashlib.sha1()
    with open(path, 'rb') as f:
        while True:
            block = f.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def sha1_of_text(text):
    return hashlib.sha1(text.encode('utf-8')).hexdigest()
