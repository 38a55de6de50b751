"""Physics, simulation and fitting services for the electromechanics toolkit."""
