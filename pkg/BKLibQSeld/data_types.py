import json as _json
import numbers
import unicodedata


class BaseField:
    """
    Clase base para todos los tipos de campos de configuración. Define la interfaz y atributos comunes.
    """

    def __init__(self, name, doc="", nullable=False, default=None, **kwargs):
        """
        Inicializa un campo base con metainformación para validación y conversión.

        :param name: Nombre de la clave de configuración.
        :param doc: Descripción del campo.
        :param nullable: Indica si el campo acepta valores nulos.
        :param default: Valor por defecto si no se proporciona uno.
        :param kwargs: Parámetros adicionales específicos del tipo de campo
            (``min_value``, ``max_value``, ``exclusive_min``, ``choices``, ``subtype``...).
        """
        self.name = name
        self.doc = doc
        self.nullable = nullable
        self.default = default
        self.extra = kwargs

    def deserialize(self, value):
        # Por defecto, no hace nada; las subclases que necesiten conversión la implementan.
        return value

    def validate(self, value):
        """
        Método que debe implementar cada tipo de campo para validar su valor.

        :param value: Valor a validar.
        :raises NotImplementedError: Si no es sobreescrito en una subclase.
        """
        raise NotImplementedError("Subclases deben implementar validate")

    def _check_null(self, value):
        if value is None:
            if not self.nullable:
                raise ValueError(f"{self.name} no puede ser nulo")
            return True
        return False

    def _check_range(self, value):
        min_val = self.extra.get("min_value")
        max_val = self.extra.get("max_value")
        exclusive_min = self.extra.get("exclusive_min")
        if min_val is not None and value < min_val:
            raise ValueError(f"{self.name} debe ser >= {min_val}")
        if exclusive_min is not None and value <= exclusive_min:
            raise ValueError(f"{self.name} debe ser > {exclusive_min}")
        if max_val is not None and value > max_val:
            raise ValueError(f"{self.name} debe ser <= {max_val}")


def _norm(s: str) -> str:
    decomposed = unicodedata.normalize("NFKD", s)
    return "".join(c for c in decomposed if not unicodedata.combining(c)).strip().lower()


class StringType(BaseField):
    def deserialize(self, value):
        if value is None:
            return None
        return str(value)

    def validate(self, value):
        if self._check_null(value):
            return
        if not isinstance(value, str):
            raise TypeError(f"{self.name} debe ser una cadena de texto (str)")
        max_len = self.extra.get("max_length")
        if max_len is not None and len(value) > max_len:
            raise ValueError(f"{self.name} debe tener como máximo {max_len} caracteres")


class IntegerType(BaseField):
    def deserialize(self, value):
        if value is None:
            return None
        if isinstance(value, bool):
            # Evitar True/False como enteros
            raise TypeError(f"{self.name} no debe ser booleano")
        if isinstance(value, numbers.Integral):
            return int(value)
        if isinstance(value, numbers.Real):
            if int(value) != value:
                raise ValueError(f"{self.name} no es entero exacto")
            return int(value)
        if isinstance(value, str):
            s = value.strip()
            if s == "":
                return None
            return int(s)
        raise TypeError(f"{self.name} debe ser un entero o convertible a entero")

    def validate(self, value):
        if self._check_null(value):
            return
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{self.name} debe ser un entero (int)")
        self._check_range(value)


class FloatType(BaseField):
    def deserialize(self, value):
        if value is None:
            return None
        if isinstance(value, bool):
            raise TypeError(f"{self.name} no debe ser booleano")
        if isinstance(value, numbers.Real):
            return float(value)
        if isinstance(value, str):
            s = value.strip()
            if s == "":
                return None
            return float(s)
        raise TypeError(f"{self.name} debe ser numérico o convertible a float")

    def validate(self, value):
        if self._check_null(value):
            return
        if isinstance(value, bool) or not isinstance(value, (float, int)):
            raise TypeError(f"{self.name} debe ser numérico (float)")
        self._check_range(value)


class BooleanType(BaseField):
    def deserialize(self, value):
        if value is None:
            return None
        if isinstance(value, bool):
            return value
        if isinstance(value, int):
            if value in (0, 1):
                return bool(value)
            raise ValueError(f"{self.name} debe ser 0/1 si es entero")
        if isinstance(value, str):
            s = _norm(value)
            truthy = {"true", "t", "1", "yes", "y", "on", "si"}
            falsy = {"false", "f", "0", "no", "n", "off"}
            if s in truthy:
                return True
            if s in falsy:
                return False
        raise TypeError(f"{self.name} debe ser booleano o convertible (true/false, 1/0, sí/no)")

    def validate(self, value):
        if self._check_null(value):
            return
        if not isinstance(value, bool):
            raise TypeError(f"{self.name} debe ser booleano")


class EnumType(BaseField):
    def deserialize(self, value):
        if isinstance(value, str):
            return value.strip()
        return value

    def validate(self, value):
        allowed = self.extra.get("choices", [])
        if self._check_null(value):
            return
        if value not in allowed:
            raise ValueError(f"{self.name} debe estar en {list(allowed)}")


class ListType(BaseField):
    def _item_field(self):
        subtype = self.extra.get("subtype")
        return subtype(name=f"{self.name}_item", **self.extra.get("subtype_options", {})) if subtype else None

    def deserialize(self, value):
        if value is None:
            return None
        if isinstance(value, tuple):
            value = list(value)
        if isinstance(value, str):
            s = value.strip()
            # intenta JSON primero, luego lista separada por comas ("8,8,2")
            try:
                parsed = _json.loads(s)
            except ValueError:
                parsed = [part for part in s.strip("[]").split(",") if part.strip() != ""]
            if not isinstance(parsed, list):
                parsed = [parsed]
            value = parsed
        if not isinstance(value, list):
            raise TypeError(f"{self.name} debe ser una lista o cadena convertible a lista")
        item = self._item_field()
        return [item.deserialize(v) for v in value] if item else list(value)

    def validate(self, value):
        if self._check_null(value):
            return
        if not isinstance(value, list):
            raise TypeError(f"{self.name} debe ser una lista")
        min_len = self.extra.get("min_length")
        if min_len is not None and len(value) < min_len:
            raise ValueError(f"{self.name} debe tener al menos {min_len} elementos")
        item = self._item_field()
        if item:
            for v in value:
                item.validate(v)
