class QSeldError(Exception):
    """
    Excepción base de BKLibQSeld. Todas las excepciones propias de la librería heredan de ella.
    """


class ConfigurationError(QSeldError, ValueError):
    """
    Configuración inválida: hiperparámetros fuera de rango, factores de pooling
    incompatibles o parámetros que no cuadran entre sí.
    """


class ShapeError(ConfigurationError):
    """
    Dimensiones incompatibles entre una capa y su entrada.

    :param what: Descripción de la magnitud comparada.
    :param expected: Valor o forma esperada.
    :param got: Valor o forma recibida.
    """

    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: se esperaba {expected}, se recibió {got}")


class PackingError(ConfigurationError):
    """
    No es posible colocar los eventos pedidos dentro de la duración del clip.
    """


class PrecisionError(ConfigurationError):
    """
    La operación exige otra precisión numérica (p. ej. gradcheck en f32).
    """


class DatasetError(QSeldError):
    """
    Dataset mal formado. El mensaje siempre nombra el fichero (y la línea si aplica).
    """

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class CheckpointError(QSeldError):
    """
    Checkpoint ilegible: magic incorrecto, versión distinta, fichero truncado o checksum inválido.
    """


class OptimizationError(QSeldError, ArithmeticError):
    """
    Valores no finitos durante la optimización (gradientes o pérdida).

    :param message: Diagnóstico.
    :param parameter: Nombre del parámetro afectado, si se conoce.
    """

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message if parameter is None else f"{message} (parámetro '{parameter}')")
