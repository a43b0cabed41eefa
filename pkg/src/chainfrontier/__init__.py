"""chainfrontier: on-chain portfolios versus constrained mean-variance frontiers.

The package rebuilds per-account token portfolios from raw transfer-event
streams, estimates return moments from daily price histories, solves three
constrained frontier projections per portfolio (minimum variance, maximum
return, maximum Sharpe ratio), and measures how far observed allocations sit
from their optimized counterparts.
"""

__version__ = "0.1.0"
