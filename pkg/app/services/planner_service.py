import ast
import json
import logging
import re
import time
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Union

import httpx

from app.core.config import settings
from app.core.exceptions import PlannerError
from app.schemas.refinement import ImageArtifact

logger = logging.getLogger(__name__)

PROMPTS_DIR = Path(__file__).resolve().parent.parent / "static" / "prompts"

KEY_IDENTITY_EXAMPLES = (
    'Caption: "a dog in front of a cat in the desert"\n'
    '    Output: ["dog", "cat"]\n'
    '    Caption: "a woman to the back left of a red car, a bench behind a bicycle on the street"\n'
    '    Output: ["woman", "red car", "bench", "bicycle"]'
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Planner prompt template shipped under app/static/prompts."""
    return (PROMPTS_DIR / f"{name}.txt").read_text(encoding="utf-8")


def parse_entity_list(text: str) -> List[str]:
    """Read the first list literal from a key-identity response."""
    for match in re.finditer(r"\[[^\[\]]*\]", text):
        try:
            value = ast.literal_eval(match.group(0))
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return [v.strip() for v in value if v.strip()]
    raise PlannerError("No entity list found in key identity response")


class PlannerPort(Protocol):
    written_images: List[Path]

    def plan(self, prompt: str) -> str:
        ...

    def refine(self, prompt: str, entities: List[str], plan_text: str, image: ImageArtifact) -> str:
        ...

    def close(self) -> None:
        ...


def _as_text(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value, indent=2, sort_keys=False)


class ScriptedPlanner:
    """
    Planner that replays canned responses.

    Script format::

        {"plan": <text or object>,
         "refine": [<text or object>, ...]}

    Refine responses are consumed in order and the last one repeats. A missing
    ``refine`` list answers every evaluation with an aligned verdict.
    """

    def __init__(self, script: Dict[str, Any]):
        if "plan" not in script:
            raise PlannerError("planner script needs a 'plan' entry")
        self.plan_text = _as_text(script["plan"])
        self.responses = [_as_text(r) for r in script.get("refine", [])] or ['{"isaligned": true}']
        self.refine_calls: List[Dict[str, Any]] = []
        self.written_images: List[Path] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedPlanner":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def plan(self, prompt: str) -> str:
        return self.plan_text

    def refine(self, prompt: str, entities: List[str], plan_text: str, image: ImageArtifact) -> str:
        index = min(len(self.refine_calls), len(self.responses) - 1)
        self.refine_calls.append({"step": image.step, "artifact_id": image.artifact_id, "plan": plan_text})
        return self.responses[index]

    def close(self) -> None:
        pass


class HttpPlanner:
    """
    Planner backed by a chat-completions style endpoint.

    Transport errors and 5xx responses are retried with exponential backoff;
    anything else fails immediately with PlannerError.

    Refine turns form one conversation: every evaluation sees the earlier
    refine exchanges of the same run. ``plan`` starts a new conversation.
    """

    def __init__(
        self,
        url: Optional[str] = None,
        key: Optional[str] = None,
        model: Optional[str] = None,
        timeout: Optional[float] = None,
        max_retries: Optional[int] = None,
        backoff: Optional[float] = None,
        image_mode: Optional[str] = None,
        image_dir: Optional[Union[str, Path]] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url or settings.PLANNER_URL
        if not self.url:
            raise PlannerError("PLANNER_URL is not configured")
        self.key = key if key is not None else settings.PLANNER_KEY
        self.model = model or settings.PLANNER_MODEL
        self.timeout = timeout if timeout is not None else settings.PLANNER_TIMEOUT
        self.max_retries = max_retries if max_retries is not None else settings.PLANNER_MAX_RETRIES
        self.backoff = backoff if backoff is not None else settings.PLANNER_BACKOFF
        self.image_mode = image_mode or settings.PLANNER_IMAGE_MODE
        self.image_dir = Path(image_dir or Path(settings.OUTPUT_DIR) / "artifacts")
        self._transport = transport
        self._sleep = sleep
        self._client: Optional[httpx.Client] = None
        self.history: List[Dict[str, Any]] = []
        self.written_images: List[Path] = []

    @property
    def client(self) -> httpx.Client:
        """Lazy loading of the HTTP client."""
        if self._client is None:
            headers = {"Content-Type": "application/json"}
            if self.key:
                headers["Authorization"] = f"Bearer {self.key}"
            self._client = httpx.Client(timeout=self.timeout, headers=headers, transport=self._transport)
            logger.info(f"Planner client initialized for {self.url} (model {self.model})")
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def _post(self, payload: Dict[str, Any]) -> str:
        delay = self.backoff
        for attempt in range(self.max_retries + 1):
            try:
                response = self.client.post(self.url, json=payload)
                if response.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"planner returned {response.status_code}", request=response.request, response=response
                    )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                retryable = isinstance(e, httpx.TransportError) or e.response.status_code >= 500
                if retryable and attempt < self.max_retries:
                    logger.warning(f"Planner request attempt {attempt + 1}/{self.max_retries + 1} failed: {e}")
                    logger.info(f"Retrying in {delay} seconds...")
                    self._sleep(delay)
                    delay *= 2
                    continue
                logger.error(f"Planner request failed: {e}")
                raise PlannerError(f"Planner request failed: {e}") from e
            except (KeyError, IndexError, TypeError, ValueError) as e:
                logger.error(f"Unexpected planner response shape: {e}")
                raise PlannerError(f"Unexpected planner response shape: {e}") from e
        raise PlannerError("Planner request failed")

    def _complete(
        self,
        system: str,
        user: Union[str, List[Dict[str, Any]]],
        history: Sequence[Dict[str, Any]] = (),
    ) -> str:
        messages = [{"role": "system", "content": system}, *history, {"role": "user", "content": user}]
        return self._post({"model": self.model, "messages": messages})

    def extract_entities(self, prompt: str) -> List[str]:
        template = load_template("key_identity_parsing")
        text = template.replace("<In-context Examples>", KEY_IDENTITY_EXAMPLES).replace("<caption>", prompt)
        return parse_entity_list(self._complete("You extract object names from captions.", text))

    def plan(self, prompt: str) -> str:
        self.history = []
        entities = self.extract_entities(prompt)
        logger.info(f"Key identities for planning: {entities}")
        user = f"text_caption: {prompt}\nentity_list: {json.dumps(entities)}"
        return self._complete(load_template("scene_planning"), user)

    def _image_reference(self, image: ImageArtifact) -> Union[str, Dict[str, Any]]:
        if self.image_mode == "path":
            self.image_dir.mkdir(parents=True, exist_ok=True)
            path = self.image_dir / f"{image.artifact_id}.png"
            path.write_bytes(image.to_png())
            self.written_images.append(path)
            return str(path)
        return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{image.to_base64()}"}}

    def refine(self, prompt: str, entities: List[str], plan_text: str, image: ImageArtifact) -> str:
        reference = self._image_reference(image)
        text = (
            f"text_caption: {prompt}\n"
            f"entity_list: {json.dumps(entities)}\n"
            f"current_layout: {plan_text}\n"
        )
        if isinstance(reference, str):
            user: Union[str, List[Dict[str, Any]]] = text + f"generated_image: {reference}"
        else:
            user = [{"type": "text", "text": text + "generated_image: (attached)"}, reference]
        reply = self._complete(load_template("layout_optimization"), user, self.history)
        self.history.extend([{"role": "user", "content": user}, {"role": "assistant", "content": reply}])
        logger.debug(f"Planner conversation now holds {len(self.history) // 2} refine turns")
        return reply
