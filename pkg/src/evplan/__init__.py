"""Joint planning of fixed and mobile EV charging stations.

Library layout:

- ``grid``        radial network model + forward/backward-sweep power flow
- ``assessment``  per-bus voltage-stability and hosting-capacity screening
- ``transport``   road graph, shortest distances, charging-demand profiles
- ``siting``      exact station-location optimization on the road graph
- ``queueing``    M/M/c evaluation and mobile-station fleet sizing
- ``fcs``         fixed-station capacity sizing against an annual cost ledger
- ``admm``        consensus coordination of siting and sizing decisions
- ``ems``         hourly flexible-capacity dispatch simulation
- ``caseio``      case-directory ingestion and parameter validation
- ``pipeline``    staged orchestration of the full planning workflow
- ``report``      delimited/JSON report emission
- ``plots``       figure rendering for report output
- ``cli``         the ``evplan`` command-line entry point
"""

__version__ = "0.1.0"
