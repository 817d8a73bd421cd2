class GridBuilder(object):
    """Collects evaluation runs to execute together (e.g. an ablation or sweep)."""

    def __init__(self):
        self.entries = list()

    def evaluate(self, cost, manifest, budget, head=None, lam=None, diagnostic=False, table=None, labels=None):
        data = {'cost': cost, 'manifest': manifest, 'budget': budget, 'head': head, 'lam': lam,
                'diagnostic': diagnostic}
        self.add_entry('evaluate', data, table, labels)
        return self

    def train_head(self, regime, pairs, delta_max=None, source_rows=None, shuffle_labels=False, table=None,
                   labels=None):
        data = {'regime': regime, 'pairs': pairs, 'delta_max': delta_max, 'source_rows': source_rows,
                'shuffle_labels': shuffle_labels}
        self.add_entry('train_head', data, table, labels)
        return self

    def add_entry(self, stage, data, table=None, labels=None):
        self.entries.append(GridEntryRequest(stage, data, table, labels))

    def build(self):
        return list(map(lambda entry: entry.to_dict(), self.entries))


class GridEntryRequest(object):
    def __init__(self, stage, data, table=None, labels=None):
        self.stage = stage
        self.data = data
        self.table = table
        self.labels = labels or {}

    def to_dict(self):
        return {'stage': self.stage, 'data': self.data, 'table': self.table, 'labels': self.labels}


class GridEntry(object):
    def __init__(self, request, result=None, error=None):
        self.request = request
        self.result = result
        self.error = error

    def ok(self):
        return self.error is None


class GridResponse(object):
    def __init__(self, entries):
        self.entries = entries

    def errors(self):
        return list(filter(lambda entry: not entry.ok(), self.entries))

    def has_errors(self):
        return len(self.errors()) > 0

    def results(self):
        return [entry.result for entry in self.entries if entry.ok()]
