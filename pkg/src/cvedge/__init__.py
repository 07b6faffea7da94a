"""cvedge: an edge-centric publish-subscribe platform for connected-vehicle
applications, with credentialed access control, flow-policy security, HetNet
medium selection, two reference applications, and a deterministic scenario
harness."""

__version__ = "0.1.0"
