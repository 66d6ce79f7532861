# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder.
#
# This file does only contain a selection of the most common options. For a
# full list see the documentation:
# http://www.sphinx-doc.org/en/stable/config

# -- Path setup --------------------------------------------------------------

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import pylcq  # noqa: E402

# -- Project information -----------------------------------------------------

project = 'pyLCQ'
copyright = "2026, the pyLCQ developers"
author = 'pyLCQ developers'
version = pylcq.__version__
release = pylcq.__version__

# -- General configuration ---------------------------------------------------

extensions = [
    'autoapi.extension',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
    'sphinx.ext.intersphinx',
    "revitron_sphinx_theme",
]

autoapi_type = 'python'
autoapi_dirs = ['../pylcq']
autoapi_ignore = ["*/tests/*",
                  "*_version.py"]
autoapi_options = ['members',
                   'undoc-members',
                   'show-inheritance',
                   'show-module-summary',
                   'imported-members']

# numpy-style docstrings
napoleon_google_docstring = False
napoleon_use_param = False
napoleon_use_ivar = True

intersphinx_mapping = {
    'numpy': ('https://numpy.org/doc/stable/', None),
    'pandas': ('https://pandas.pydata.org/docs/', None),
}

source_suffix = '.rst'
master_doc = 'index'
language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'default'

# -- Options for HTML output -------------------------------------------------

html_theme = "revitron_sphinx_theme"
html_theme_options = {
    'collapse_navigation': True,
    'sticky_navigation': True,
    'navigation_depth': 4,
    'titles_only': False,
    'color_scheme': 'dark'
}
html_title = 'pyLCQ'
htmlhelp_basename = 'pylcqdoc'
