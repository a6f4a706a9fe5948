"""Spatiotemporal geometry model on a view-by-time token grid."""
