/**
 * The search-judge-refine loop, wired together.
 *
 * All state is derived from server responses; a refresh loses nothing
 * but the current selection. Judgments go to the server first and are
 * only shown as recorded once the append is acknowledged.
 */

import { ApiError, type SearchApi } from "./api.js";
import { CURVE_HEIGHT, CURVE_WIDTH, curvePoints, finalTp } from "./curve.js";
import {
  type AppState,
  beginJudgment,
  clearError,
  confirmJudgment,
  failJudgment,
  initialState,
  moveSelection,
  resetForSearch,
  selectedImageId,
  setError,
  verdictOf,
} from "./state.js";
import type { BBox, SearchMode, Verdict } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const VERDICT_LABEL: Record<string, string> = {
  true_positive: "TP",
  false_positive: "FP",
  pending: "saving…",
};

export class App {
  readonly state: AppState;
  private readonly doc: Document;
  private readonly keyHandler: (ev: KeyboardEvent) => void;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: SearchApi,
  ) {
    this.state = initialState();
    this.doc = root.ownerDocument;
    this.keyHandler = (ev) => this.onKey(ev);
    this.renderSkeleton();
    this.doc.addEventListener("keydown", this.keyHandler);
  }

  destroy(): void {
    this.doc.removeEventListener("keydown", this.keyHandler);
    this.root.innerHTML = "";
  }

  async init(): Promise<void> {
    try {
      const doc = await this.api.getClasses();
      this.state.classes = doc.classes;
      this.state.imageCount = doc.image_count;
      this.state.objectCount = doc.object_count;
    } catch (err) {
      setError(this.state, err instanceof Error ? err.message : String(err));
    }
    this.render();
  }

  // -- user actions ---------------------------------------------------------

  async submitSearch(): Promise<void> {
    const classValue = this.input("class-input").value.trim();
    const text = this.input("text-input").value.trim();
    const k = Math.max(1, Number(this.input("k-input").value) || 1);
    const mode = (this.root.querySelector("#mode-input") as HTMLSelectElement)
      .value as SearchMode;
    clearError(this.state);
    try {
      const resp = await this.api.search({
        class: classValue === "" ? null : classValue,
        text,
        k,
        mode,
      });
      resetForSearch(this.state, {
        queryId: resp.query_id,
        classLabel: classValue === "" ? null : classValue,
        text,
        mode,
        k,
        results: resp.results,
        exhausted: resp.exhausted,
      });
      this.render();
      await this.refreshCurve();
    } catch (err) {
      if (err instanceof ApiError) {
        setError(this.state, err.message, err.validClasses);
      } else {
        setError(this.state, err instanceof Error ? err.message : String(err));
      }
      this.render();
    }
  }

  async judgeSelected(verdict: Verdict): Promise<void> {
    const search = this.state.search;
    const imageId = selectedImageId(this.state);
    if (search === null || imageId === null) return;
    if (!beginJudgment(this.state, imageId, verdict)) return;
    this.render();
    try {
      await this.api.judge({
        query_id: search.queryId,
        image_id: imageId,
        verdict,
        judge: "webui",
      });
      confirmJudgment(this.state, imageId);
      this.render();
      await this.refreshCurve();
    } catch (err) {
      failJudgment(this.state, imageId);
      setError(this.state, err instanceof Error ? err.message : String(err));
      this.render();
    }
  }

  pinBaseline(): void {
    if (this.state.curve === null || this.state.search === null) return;
    const name = `${this.state.search.classLabel ?? "any"}: ${this.state.search.text}`;
    this.state.baselines.push({ name, curve: [...this.state.curve] });
    this.render();
  }

  private async refreshCurve(): Promise<void> {
    const search = this.state.search;
    if (search === null) return;
    try {
      const resp = await this.api.curve(search.queryId, search.k);
      this.state.curve = resp.curve;
    } catch (err) {
      setError(this.state, err instanceof Error ? err.message : String(err));
    }
    this.render();
  }

  private onKey(ev: KeyboardEvent): void {
    const target = ev.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "SELECT")) return;
    if (this.state.search === null) return;
    switch (ev.key) {
      case "ArrowDown":
      case "j":
        moveSelection(this.state, 1);
        this.render();
        ev.preventDefault();
        break;
      case "ArrowUp":
      case "k":
        moveSelection(this.state, -1);
        this.render();
        ev.preventDefault();
        break;
      case "t":
        void this.judgeSelected("true_positive");
        break;
      case "f":
        void this.judgeSelected("false_positive");
        break;
    }
  }

  // -- rendering ------------------------------------------------------------

  private renderSkeleton(): void {
    this.root.innerHTML = `
      <header>
        <h1>objsearch</h1>
        <span id="stats"></span>
      </header>
      <form id="query-form">
        <input id="class-input" list="class-options" placeholder="object class"
               autocomplete="off" aria-label="object class">
        <datalist id="class-options"></datalist>
        <input id="text-input" placeholder="describe what to find" required
               aria-label="query text">
        <input id="k-input" type="number" min="1" value="20" aria-label="result count">
        <select id="mode-input" aria-label="search mode">
          <option value="object">object</option>
          <option value="full">full image</option>
        </select>
        <button type="submit">search</button>
      </form>
      <p id="error" class="error" hidden></p>
      <p id="status" hidden></p>
      <section id="results" class="grid" aria-label="results"></section>
      <section id="curve-panel" hidden>
        <h2>cumulative true positives</h2>
        <svg id="curve" viewBox="0 0 ${CURVE_WIDTH} ${CURVE_HEIGHT}"
             width="${CURVE_WIDTH}" height="${CURVE_HEIGHT}" role="img"></svg>
        <p id="curve-label"></p>
        <button id="pin-curve" type="button">pin as baseline</button>
      </section>
      <p class="hint">click a result, then T marks a true positive, F a false
        positive; arrow keys move the selection</p>
    `;
    const form = this.root.querySelector("#query-form") as HTMLFormElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submitSearch();
    });
    const pin = this.root.querySelector("#pin-curve") as HTMLButtonElement;
    pin.addEventListener("click", () => this.pinBaseline());
  }

  private input(id: string): HTMLInputElement {
    return this.root.querySelector(`#${id}`) as HTMLInputElement;
  }

  private render(): void {
    this.renderStats();
    this.renderClassOptions();
    this.renderError();
    this.renderStatus();
    this.renderResults();
    this.renderCurve();
  }

  private renderStats(): void {
    const stats = this.root.querySelector("#stats") as HTMLElement;
    stats.textContent =
      this.state.imageCount > 0 || this.state.objectCount > 0
        ? `${this.state.imageCount} images / ${this.state.objectCount} objects indexed`
        : "";
  }

  private renderClassOptions(): void {
    const list = this.root.querySelector("#class-options") as HTMLElement;
    list.innerHTML = "";
    for (const entry of this.state.classes) {
      const option = this.doc.createElement("option");
      option.value = entry.label;
      option.label = `${entry.label} (${entry.object_count})`;
      list.appendChild(option);
    }
  }

  private renderError(): void {
    const box = this.root.querySelector("#error") as HTMLElement;
    if (this.state.error === null) {
      box.hidden = true;
      box.textContent = "";
      return;
    }
    box.hidden = false;
    box.textContent =
      this.state.errorClasses.length > 0
        ? `${this.state.error} (valid classes: ${this.state.errorClasses.join(", ")})`
        : this.state.error;
  }

  private renderStatus(): void {
    const status = this.root.querySelector("#status") as HTMLElement;
    const { search, imageCount } = this.state;
    if (imageCount === 0 && this.state.error === null) {
      status.hidden = false;
      status.textContent = "the index is empty; ingest a dataset to get started";
      return;
    }
    if (search === null) {
      status.hidden = true;
      return;
    }
    if (search.results.length === 0) {
      status.hidden = false;
      status.textContent = "no matching images";
    } else if (search.exhausted) {
      status.hidden = false;
      status.textContent = `only ${search.results.length} matching images`;
    } else {
      status.hidden = true;
    }
  }

  private renderResults(): void {
    const grid = this.root.querySelector("#results") as HTMLElement;
    grid.innerHTML = "";
    const search = this.state.search;
    if (search === null) return;
    search.results.forEach((row, rank) => {
      const card = this.doc.createElement("article");
      card.className = "result";
      if (rank === this.state.selected) card.classList.add("selected");
      card.dataset.imageId = row.image_id;
      card.addEventListener("click", () => {
        this.state.selected = rank;
        this.render();
      });

      const head = this.doc.createElement("div");
      head.className = "result-head";
      const rankEl = this.doc.createElement("span");
      rankEl.className = "rank";
      rankEl.textContent = `#${rank + 1}`;
      const idEl = this.doc.createElement("span");
      idEl.className = "image-id";
      idEl.textContent = row.image_id;
      const scoreEl = this.doc.createElement("span");
      scoreEl.className = "score";
      scoreEl.textContent = row.score.toFixed(4);
      head.append(rankEl, idEl, scoreEl);

      const badge = this.doc.createElement("span");
      badge.className = "verdict";
      const verdict = verdictOf(this.state, row.image_id);
      if (verdict !== null) {
        badge.textContent = VERDICT_LABEL[verdict] ?? verdict;
        badge.classList.add(verdict === "pending" ? "pending" : verdict);
      }
      head.appendChild(badge);
      card.appendChild(head);

      const frame = this.doc.createElement("div");
      frame.className = "thumb-frame";
      const img = this.doc.createElement("img");
      img.className = "thumb";
      img.loading = "lazy";
      img.alt = row.image_id;
      img.src = this.api.imageUrl(row.image_id);
      frame.appendChild(img);
      if (row.bbox !== null) {
        const overlay = this.doc.createElement("div");
        overlay.className = "bbox-overlay";
        overlay.dataset.bbox = row.bbox.join(",");
        img.addEventListener("load", () => positionOverlay(img, overlay, row.bbox!));
        frame.appendChild(overlay);
      }
      card.appendChild(frame);

      if (row.best_object_index !== null) {
        const crop = this.doc.createElement("img");
        crop.className = "crop";
        crop.loading = "lazy";
        crop.alt = `${row.image_id} object ${row.best_object_index}`;
        crop.src = this.api.cropUrl(row.image_id, row.best_object_index);
        card.appendChild(crop);
      }
      grid.appendChild(card);
    });
  }

  private renderCurve(): void {
    const panel = this.root.querySelector("#curve-panel") as HTMLElement;
    const svg = this.root.querySelector("#curve") as SVGSVGElement;
    const label = this.root.querySelector("#curve-label") as HTMLElement;
    const curve = this.state.curve;
    if (curve === null) {
      panel.hidden = true;
      return;
    }
    panel.hidden = false;
    svg.innerHTML = "";
    for (const baseline of this.state.baselines) {
      const line = this.doc.createElementNS(SVG_NS, "polyline");
      line.setAttribute("points", curvePoints(baseline.curve));
      line.setAttribute("class", "baseline");
      line.setAttribute("data-name", baseline.name);
      svg.appendChild(line);
    }
    const line = this.doc.createElementNS(SVG_NS, "polyline");
    line.setAttribute("points", curvePoints(curve));
    line.setAttribute("class", "active-curve");
    svg.appendChild(line);
    svg.setAttribute("data-curve", curve.join(","));
    label.textContent = `${finalTp(curve)} true positives in the first ${curve.length}`;
  }
}

function positionOverlay(img: HTMLImageElement, overlay: HTMLElement, bbox: BBox): void {
  if (img.naturalWidth === 0 || img.naturalHeight === 0) return;
  const [x, y, w, h] = bbox;
  overlay.style.left = `${(x / img.naturalWidth) * 100}%`;
  overlay.style.top = `${(y / img.naturalHeight) * 100}%`;
  overlay.style.width = `${(w / img.naturalWidth) * 100}%`;
  overlay.style.height = `${(h / img.naturalHeight) * 100}%`;
}

export function createApp(root: HTMLElement, api: SearchApi): App {
  return new App(root, api);
}
