import threading
from functools import wraps


def FairSingleton(cls):
    """One shared instance per decorated class; ``reset()`` drops it."""
    instance = None
    lock = threading.Lock()

    @wraps(cls)
    def get_instance(*args, **kwargs):
        nonlocal instance
        with lock:
            if instance is None:
                instance = cls(*args, **kwargs)
            return instance

    def reset():
        nonlocal instance
        with lock:
            instance = None

    get_instance.reset = reset
    return get_instance
