# wsl documentation build configuration file

import wsl

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.intersphinx']

exclude_patterns = ['_build']
source_suffix = '.rst'
master_doc = 'index'

project = 'wsl'
copyright = '2026, Emory University Libraries'
version = '%d.%d' % wsl.__version_info__[:2]
release = wsl.__version__
modindex_common_prefix = ['wsl.']

pygments_style = 'sphinx'

htmlhelp_basename = 'wsldoc'

latex_documents = [
  ('index', 'wsl.tex', 'wsl Documentation',
   'Emory University Libraries', 'manual'),
]

# configuration for intersphinx: refer to the Python standard library, numpy, torch
intersphinx_mapping = {
    'python': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'torch': ('https://pytorch.org/docs/stable/', None),
}
