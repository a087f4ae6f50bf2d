from typing import Tuple

import numpy as np

# m×n table, viruses as rows and animal columns as columns
Matrix = np.ndarray
# (m, n, K)
Dims = Tuple[int, int, int]
