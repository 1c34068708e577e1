# -*- coding: utf-8 -*-
#
# cscnet documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sys
import os

# make the package importable for autodoc
sys.path.insert(0, os.path.abspath("../"))

# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.todo",
    "sphinx.ext.viewcode",
]

templates_path = ["_templates"]

source_suffix = ".rst"

master_doc = "index"

project = u"cscnet"
copyright = u"2024, cscnet developers"
author = u"cscnet developers"

version = u"0.1"
release = u"0.1"

language = None

exclude_patterns = ["_build"]

pygments_style = "sphinx"

todo_include_todos = True

# -- Options for HTML output ----------------------------------------------

html_theme = "sphinx_rtd_theme"

html_theme_options = {}

htmlhelp_basename = "cscnetdoc"

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (master_doc, "cscnet.tex", u"cscnet Documentation", author, "manual"),
]
