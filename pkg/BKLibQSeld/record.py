import copy
import json
from typing import Iterable, Optional, Type
from pydantic import BaseModel as PydanticBaseModel, ConfigDict, Field as PydanticField, create_model
from BKLibQSeld.config import Config
from BKLibQSeld.exceptions import ConfigurationError

PYDANTIC_TYPE_MAP = Config.PYDANTIC_TYPE_EQUIVALENTS


class Record:
    """
    Clase base para representar un registro de configuración con validación y conversión a formatos comunes.
    """
    fields: dict = {}

    def __init__(self, **kwargs):
        """
        Inicializa una instancia del registro utilizando los valores proporcionados en `kwargs`.
        Cada valor se convierte primero y se valida después; las claves que falten toman su valor por defecto.

        :raises ConfigurationError: Si se pasan claves que el registro no declara.
        """
        unknown = sorted(set(kwargs) - set(self.__class__.fields))
        if unknown:
            raise ConfigurationError(f"Claves desconocidas para {self.__class__.__name__}: {unknown}")
        self._data = {}
        for key, field in self.__class__.fields.items():
            raw = kwargs[key] if key in kwargs else copy.deepcopy(field.default)
            value = field.deserialize(raw)
            field.validate(value)
            self._data[key] = value
        self.check()

    def check(self):
        """
        Validación entre campos. Las subclases la sobrescriben si lo necesitan.
        """

    def __getattr__(self, item):
        """
        Permite acceder a los valores de los campos como atributos del objeto.
        Lanza AttributeError si el campo no existe.
        """
        if item.startswith("_"):
            raise AttributeError(item)
        if item in self._data:
            return self._data[item]
        raise AttributeError(f"No existe el campo '{item}'")

    def __eq__(self, other):
        return type(self) is type(other) and self._data == other._data

    def __repr__(self):
        return f"<{self.__class__.__name__} {self._data}>"

    def to_dict(self):
        """
        Convierte el registro a un diccionario.

        :return: Diccionario (copia profunda) con los datos del registro.
        """
        return copy.deepcopy(self._data)

    def to_json(self, **kwargs):
        """
        Convierte el registro a una cadena JSON.
        """
        return json.dumps(self.to_dict(), **kwargs)

    def replace(self, **overrides):
        """
        Devuelve una copia del registro con los valores indicados sustituidos.
        """
        data = self.to_dict()
        data.update(overrides)
        return self.__class__(**data)

    def with_overrides(self, assignments: Iterable[str]):
        """
        Aplica asignaciones en texto del estilo ``--set clave=valor``.

        :param assignments: Lista de cadenas ``clave=valor``.
        :return: Nuevo registro con los valores convertidos por cada campo.
        :raises ConfigurationError: Si una asignación no tiene '=' o la clave no existe.
        """
        overrides = {}
        for assignment in assignments:
            key, sep, value = assignment.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigurationError(f"Asignación inválida '{assignment}', se esperaba clave=valor")
            if key not in self.__class__.fields:
                raise ConfigurationError(f"Clave desconocida en --set: '{key}'")
            overrides[key] = value
        return self.replace(**overrides)

    def project(self, record_cls: Type["Record"]):
        """
        Construye otro registro con las claves que ambos comparten.
        """
        return record_cls(**{k: v for k, v in self.to_dict().items() if k in record_cls.fields})

    @classmethod
    def from_dict(cls, data: dict):
        """
        Crea una instancia del registro a partir de un diccionario.
        """
        return cls(**data)

    @classmethod
    def from_json(cls, json_str: str):
        """
        Crea una instancia del registro a partir de una cadena JSON.
        """
        return cls.from_dict(json.loads(json_str))

    @classmethod
    def pydantic_definition_model(cls, name=None) -> Type[PydanticBaseModel]:
        """
        Genera una clase Pydantic equivalente al registro actual. Las claves extra se rechazan.

        :param name: Nombre opcional para el modelo generado.
        :return: Clase de modelo Pydantic.
        """
        name = name or f"P_{cls.__name__}"
        annotations = {}
        for attr_name, field in cls.fields.items():
            py_type = PYDANTIC_TYPE_MAP.get(type(field), str)
            if field.nullable:
                py_type = Optional[py_type]
            annotations[attr_name] = (py_type, PydanticField(
                default=copy.deepcopy(field.default),
                description=field.doc or "",
            ))
        return create_model(name, __config__=ConfigDict(extra="forbid"), **annotations)

    @classmethod
    def validate_document(cls, text: str) -> dict:
        """
        Valida un documento JSON con el modelo Pydantic del registro y devuelve
        solo las claves presentes en el documento.
        """
        model = cls.pydantic_definition_model().model_validate_json(text)
        return model.model_dump(exclude_unset=True)

