"""
Utility modules for the electromechanics toolkit.

Modules:
    errors: Exception hierarchy with CLI exit codes
    helpers: Device configurations, trace/table files, argument parsing
    logging_config: Toolkit logger setup
    plotting: SVG figures with CSV companions
"""
