"""
Command-line verbs for the electromechanics toolkit.

Modules:
    simulate: Synthetic EIT, cavity, noise and ring-down traces
    fit: Fit a trace and write a report plus residual trace
    cooling: Cooling-curve table from drive powers or noise fits
    calibrate: Intra-cavity photon number for a drive tone
    ringdown: Ring-down simulation and decay-rate fit
    g0: Vacuum coupling rate from an EIT power sweep
    plot: SVG rendering of traces and result tables
"""
