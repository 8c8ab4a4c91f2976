# Utils package for the heralded Fock-state toolkit

__version__ = "0.1.0"
