"""rxncond: reaction-condition prediction from molecular graphs.

Submodules:

* ``tensor``     - float64 autodiff core and the Adam optimizer
* ``smiles``     - SMILES parsing and graph featurization
* ``conditions`` - condition dictionary build/encode/filter
* ``graphnet``   - the four graph processing networks
* ``model``      - joint reaction model, training, checkpoints
* ``evaluation`` - top-k accuracy, dummy baseline, AER
* ``interpret``  - atom activation maps and SVG rendering
* ``service``    - FastAPI app over a trained checkpoint
* ``cli``        - the ``rxncond`` command
"""

__version__ = "0.1.0"
