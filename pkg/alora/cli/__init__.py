"""
CLI package for the lab.
Contains the command routes, middleware decorators and the argument parser.
"""

from .app import create_parser, main
from .middleware import exit_codes, log_phase, setup_logging
from .routes import cmd_compare, cmd_merge, cmd_report, cmd_run, cmd_sweep

__all__ = ['create_parser', 'main', 'exit_codes', 'log_phase', 'setup_logging',
           'cmd_compare', 'cmd_merge', 'cmd_report', 'cmd_run', 'cmd_sweep']
