import math
import time
from collections import OrderedDict


def write_to_record_file(data, file_path, verbose=True):
    if verbose:
        print(data)
    if file_path is None:
        return
    with open(file_path, 'a') as record_file:
        record_file.write(data + '\n')


def asMinutes(s):
    m = math.floor(s / 60)
    s -= m * 60
    return '%dm %ds' % (m, s)


def timeSince(since, percent):
    now = time.time()
    s = now - since
    es = s / (percent)
    rs = es - s
    return '%s (- %s)' % (asMinutes(s), asMinutes(rs))


class Timer:
    ''' Wall-clock accumulator keyed by pipeline module.

        tic/toc pairs add to the running totals and to the current frame row;
        step() closes the row so per-frame breakdowns can be dumped later.
    '''

    def __init__(self):
        self.reset()

    def reset(self):
        self.cul = OrderedDict()
        self.start = {}
        self.iter = 0
        self.rows = []
        self._row = OrderedDict()

    def tic(self, key):
        self.start[key] = time.perf_counter()

    def toc(self, key):
        delta = time.perf_counter() - self.start.pop(key)
        self.cul[key] = self.cul.get(key, 0.) + delta
        self._row[key] = self._row.get(key, 0.) + delta * 1000.
        return delta

    def add(self, key, millis):
        self.cul[key] = self.cul.get(key, 0.) + millis / 1000.
        self._row[key] = self._row.get(key, 0.) + millis

    def row(self):
        return OrderedDict(self._row)

    def step(self):
        self.rows.append(self.row())
        self._row = OrderedDict()
        self.iter += 1

    def means(self, skip=0):
        ''' Mean milliseconds per key over the recorded rows, dropping the first `skip` rows. '''
        rows = self.rows[skip:] if len(self.rows) > skip else self.rows
        keys = []
        for r in rows:
            keys.extend(k for k in r if k not in keys)
        return OrderedDict(
            (k, sum(r.get(k, 0.) for r in rows) / max(len(rows), 1)) for k in keys
        )

    def show(self):
        total = sum(self.cul.values())
        lines = []
        for key in self.cul:
            lines.append("%s, total time %0.2f, avg time %0.2f, part of %0.2f" %
                         (key, self.cul[key], self.cul[key] * 1. / max(self.iter, 1),
                          self.cul[key] * 1. / max(total, 1e-12)))
        return '\n'.join(lines)
