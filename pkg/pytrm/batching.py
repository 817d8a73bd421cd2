class Batches(object):
    """Page through shuffled minibatches of row indices.
    Each page is one epoch: a fresh permutation split into minibatches.
    Optionally iterate through all epochs (automatically fetching pages) or manually list and paginate.

    Example: Batches(n_rows=5, batch_size=2, rng=rng, epochs=3) yields 3 pages of 3 minibatches each.
    """

    def __init__(self, n_rows, batch_size, rng, epochs=1, automatic_pagination=True, current=1):
        """
        :param int n_rows: Number of rows to index.
        :param int batch_size: Rows per minibatch (the last one of an epoch may be shorter).
        :param numpy.random.Generator rng: Generator used for the per-epoch permutation.
        :param int epochs: Number of pages (epochs).
        :param bool automatic_pagination: Default True. During iteration automatically move to the next epoch.
        :param int current: Epoch number of the page being built (1-based).
        """
        self.n_rows = n_rows
        self.batch_size = batch_size
        self.rng = rng
        self.current = current
        self.total = epochs
        self.automatic_pagination = automatic_pagination
        order = rng.permutation(n_rows)
        self.data = [order[i:i + batch_size] for i in range(0, n_rows, batch_size)]
        self.index = 0
        self.length = len(self.data)

    @property
    def steps_per_page(self):
        return -(-self.n_rows // self.batch_size)

    @property
    def total_steps(self):
        return self.steps_per_page * self.total

    def all(self):
        """Return every minibatch of every remaining epoch as a list.

        :return: All minibatches.
        :rtype: ``list``
        """
        results = list(self.data)
        while self.current < self.total:
            self.fetch_next_page()
            results.extend(self.data)
        return results

    def current_page(self):
        """Return the minibatches of the current epoch.

        :rtype: ``list``
        """
        return self.data

    def fetch_next_page(self):
        """Draws the next epoch's permutation and refreshes the Batches instance."""
        self.__init__(self.n_rows, self.batch_size, self.rng, self.total,
                      self.automatic_pagination, self.current + 1)

    def __getitem__(self, idx):
        return self.data[idx]

    def __iter__(self):
        return self

    def __len__(self):
        """Number of minibatches in the current epoch."""
        return len(self.data)

    def __next__(self):
        """Next minibatch; moves to the next epoch when the current one is used up.

        :rtype: ``numpy.ndarray``
        """
        if self.index < self.length:
            self.index += 1
            return self.data[self.index - 1]
        if self.automatic_pagination and (self.current < self.total):
            self.fetch_next_page()
            return self.__next__()
        raise StopIteration()

