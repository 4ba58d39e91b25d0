/** DOM rendering and event wiring. Keyboard shortcuts on the focused
 * card: a = accept, r = reject, e = edit/revise. */

import type { Candidate } from "./api.js";
import { ReviewController } from "./controller.js";
import type { QueueFilters } from "./state.js";

const STATUSES: QueueFilters["status"][] = [
  "pending",
  "accepted",
  "revised",
  "rejected",
  "disputed",
  "all",
];

export class App {
  private root: HTMLElement;

  constructor(private readonly controller: ReviewController, root: HTMLElement) {
    this.root = root;
  }

  async start(): Promise<void> {
    if (!this.controller.reviewer()) {
      const name = window.prompt("Reviewer name (sent with every decision):") ?? "";
      if (name.trim()) this.controller.setReviewer(name);
    }
    await this.controller.refresh();
    this.render();
  }

  private async refreshAndRender(): Promise<void> {
    await this.controller.refresh();
    this.render();
  }

  render(): void {
    const state = this.controller.state;
    this.root.replaceChildren();

    const bar = el("div", "toolbar");
    bar.append(
      el("span", "reviewer-name", `Reviewer: ${this.controller.reviewer() || "(unset)"}`),
    );
    const select = document.createElement("select");
    for (const status of STATUSES) {
      const opt = document.createElement("option");
      opt.value = status;
      opt.textContent = status;
      opt.selected = state.filters.status === status;
      select.append(opt);
    }
    select.addEventListener("change", () => {
      state.filters.status = select.value as QueueFilters["status"];
      state.page = 0;
      void this.refreshAndRender();
    });
    bar.append(select);

    const refresh = button("Refresh", () => void this.refreshAndRender());
    bar.append(refresh);
    this.root.append(bar);

    if (state.banner) {
      const banner = el("div", "banner", state.banner);
      banner.append(button("Retry", () => void this.refreshAndRender()));
      this.root.append(banner);
    }

    const cards = state.currentPage();
    if (cards.length === 0) {
      this.root.append(el("div", "empty", "Nothing to review in this view."));
    }
    for (const card of cards) {
      this.root.append(this.renderCard(card));
    }

    const pager = el("div", "pager");
    pager.append(
      button("Prev", () => {
        state.prevPage();
        this.render();
      }),
      el("span", "", ` page ${state.page + 1} / ${state.pageCount()} `),
      button("Next", () => {
        state.nextPage();
        this.render();
      }),
    );
    this.root.append(pager);
  }

  private renderCard(card: Candidate): HTMLElement {
    const state = this.controller.state;
    const box = el("div", `card status-${card.status}`);
    box.tabIndex = 0;
    box.dataset.id = card.id;

    const head = el("div", "card-head");
    head.append(
      el("span", "db", card.db_id),
      el("span", `status ${card.status}`, card.status),
      el("span", "cid", card.id),
    );
    box.append(head);

    const context = el("div", "context");
    card.base.utterances.forEach((utt, i) => {
      context.append(el("div", "utterance", `${i + 1}. ${utt}`));
    });
    context.append(el("pre", "sql prev-sql", card.base.prev_sql));
    box.append(context);

    // the service ships canonical SQL plus highlight segments; the client
    // renders them verbatim and never re-parses
    const sql = el("pre", "sql new-sql");
    for (const segment of card.highlight ?? [{ text: card.new_sql, changed: false }]) {
      const span = el("span", segment.changed ? "changed" : "same", segment.text + " ");
      sql.append(span);
    }
    box.append(sql);

    const editor = document.createElement("textarea");
    editor.className = "draft";
    editor.value = state.dirtyText(card.id) ?? card.final_utterance ?? card.draft_utterance;
    editor.addEventListener("input", () => state.markDirty(card.id, editor.value));
    box.append(editor);

    const actions = el("div", "actions");
    const disabled = state.isInFlight(card.id);
    const submit = (action: "accept" | "reject" | "revise") => {
      const text = action === "revise" ? editor.value : undefined;
      this.controller
        .submit(card.id, action, text)
        // refetch after every submit so concurrent reviewers' decisions show up
        .then(() => this.refreshAndRender())
        .catch(() => this.render());
    };
    actions.append(
      button("Accept (a)", () => submit("accept"), disabled),
      button("Reject (r)", () => submit("reject"), disabled),
      button("Revise (e)", () => submit("revise"), disabled),
    );
    box.append(actions);

    box.addEventListener("keydown", (ev) => {
      if (ev.target === editor) return;
      if (ev.key === "a") submit("accept");
      else if (ev.key === "r") submit("reject");
      else if (ev.key === "e") editor.focus();
    });
    return box;
  }
}

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function button(label: string, onClick: () => void, disabled = false): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = label;
  b.disabled = disabled;
  b.addEventListener("click", onClick);
  return b;
}
