import os
import sys

import sphinx_rtd_theme

sys.path.insert(0, os.path.abspath(".."))

from erv_mixture import __version__  # noqa: E402

# -- Project information -----------------------------------------------------

project = "ERV Mixture"
copyright = "2026, erv_mixture developers"
author = "erv_mixture developers"
release = __version__

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_rtd_theme",
    "sphinx_markdown_tables",
    "recommonmark",
]

# numpy style "Parameters" / "Returns" blocks
napoleon_google_docstring = False
napoleon_numpy_docstring = True

# library stack is not needed to render the API pages
autodoc_mock_imports = ["sklearn", "typer", "rich", "fire"]
autodoc_member_order = "bysource"
autoclass_content = "both"

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_static_path = ["_static"]
