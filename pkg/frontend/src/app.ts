/** Console shell: login screen, then inbox + item browser + timeline. */

import { clear, el } from "./dom.js";
import { InboxView } from "./inbox.js";
import { ItemsView } from "./items.js";
import { login } from "./session.js";
import { TimelineView } from "./timeline.js";

export function mount(root: HTMLElement): void {
  clear(root);
  const name = el("input", { type: "text", placeholder: "agent name", class: "agent-name" });
  const server = el("input", {
    type: "text",
    class: "server-url",
    value: window.location.origin,
  });
  const button = el("button", { type: "button", class: "login" }, "log in");
  const notice = el("p", { class: "notice" });
  root.append(el("div", { class: "login-box" },
    el("h1", {}, "Operator console"), server, name, button, notice));

  button.addEventListener("click", () => {
    void (async () => {
      try {
        const session = await login(server.value, name.value);
        clear(root);
        const inbox = new InboxView(session);
        const items = new ItemsView(session);
        const timeline = new TimelineView(session);
        items.onOpen = (itemName) => void timeline.show(itemName);
        inbox.onChanged = () => void items.refresh();
        root.append(
          el("div", { class: "columns" }, inbox.root, items.root, timeline.root));
        await inbox.refresh();
        await items.refresh();
      } catch (error) {
        notice.textContent = error instanceof Error ? error.message : String(error);
      }
    })();
  });
}

declare global {
  interface Window {
    ddsConsoleMount?: typeof mount;
  }
}

if (typeof window !== "undefined") {
  window.ddsConsoleMount = mount;
  const root = document.getElementById("app");
  if (root) {
    mount(root);
  }
}
