"""invlab: learning class-invariant context features to debias classifiers."""
